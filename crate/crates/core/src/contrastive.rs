//! Training objective and the two-stage schedule.
//!
//! Stage 1 pre-aligns the volume and report encoders (the teachers) with the
//! C-R term alone. Stage 2 freezes them and trains the radiograph student on
//! the X-R and X-C terms. Teachers only ever enter the stage-2 tape as
//! constants, and their checkpoint hash is compared before and after.

use crate::encoders::{
    Checkpoint, Parameterized, RadiographEncoder, ReportEncoder, VolumeEncoder,
};
use crate::error::{Error, Result};
use crate::phantom::LabelSpace;
use crate::rng::SplitMix64;
use crate::tensor::{NodeId, Reduction, Tape, Tensor};

const TAG_TEACHER_INIT: u64 = 0x7465_6163;
const TAG_STUDENT_INIT: u64 = 0x7374_7564;
const TAG_EPOCH_TEACHER: u64 = 0x6570_0001;
const TAG_EPOCH_STUDENT: u64 = 0x6570_0002;

/// Rows are accepted as unit norm within this tolerance.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LossWeights {
    pub const TEACHER: Self = Self {
        alpha: 1.0,
        beta: 0.0,
        gamma: 0.0,
    };
    pub const STUDENT: Self = Self {
        alpha: 0.0,
        beta: 1.0,
        gamma: 1.0,
    };

    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be a finite non-negative number, got {v}")));
            }
        }
        if self.alpha + self.beta + self.gamma == 0.0 {
            return Err(Error::config("alpha/beta/gamma", "at least one weight must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub reduction: Reduction,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            lr: 1e-3,
            batch_size: 32,
            epochs: 30,
            weight_decay: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            reduction: Reduction::Mean,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Optimizer settings of the original large-scale runs.
    pub fn large_scale() -> Self {
        Self {
            lr: 5e-5,
            batch_size: 360,
            epochs: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("tau", "must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be non-negative"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be at least 2"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return Err(Error::config("adam_beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("adam_beta2", "must lie in [0, 1)"));
        }
        if self.adam_eps <= 0.0 {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        Ok(())
    }
}

fn check_unit_rows(t: &Tensor, op: &'static str) -> Result<()> {
    let (n, _) = t.dims2(op)?;
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    for (row, r) in t.rows().enumerate() {
        let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotNormalized { row, norm });
        }
    }
    Ok(())
}

/// Symmetric InfoNCE over index-matched rows of `a` and `b`:
/// `0.5 * (xent(a b^T / tau) + xent(b a^T / tau))` with diagonal targets.
pub fn info_nce_loss(tape: &mut Tape, a: NodeId, b: NodeId, tau: f64, reduction: Reduction) -> Result<NodeId> {
    let (ta, tb) = (tape.value(a), tape.value(b));
    if ta.shape() != tb.shape() {
        return Err(Error::Dimension {
            op: "info_nce_loss",
            left: ta.shape().to_vec(),
            right: tb.shape().to_vec(),
        });
    }
    check_unit_rows(ta, "info_nce_loss")?;
    check_unit_rows(tb, "info_nce_loss")?;
    let n = ta.shape()[0];
    let targets: Vec<usize> = (0..n).collect();
    let inv_tau = 1.0 / tau;

    let s_ab = tape.similarity(a, b)?;
    let s_ab = tape.scale(s_ab, inv_tau)?;
    let l_ab = tape.softmax_cross_entropy_rows(s_ab, &targets, reduction)?;
    let s_ba = tape.similarity(b, a)?;
    let s_ba = tape.scale(s_ba, inv_tau)?;
    let l_ba = tape.softmax_cross_entropy_rows(s_ba, &targets, reduction)?;
    let both = tape.add(l_ab, l_ba)?;
    tape.scale(both, 0.5)
}

/// Loss value only, for monitoring and evaluation.
pub fn info_nce_value(a: &Tensor, b: &Tensor, tau: f64, reduction: Reduction) -> Result<f64> {
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let l = info_nce_loss(&mut tape, a, b, tau, reduction)?;
    tape.value(l).item()
}

/// Nodes of the weighted tri-modal loss. Terms with zero weight are not
/// recorded at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct X2ctTerms {
    pub cr: Option<NodeId>,
    pub xr: Option<NodeId>,
    pub xc: Option<NodeId>,
    pub total: NodeId,
}

/// `alpha L(C,R) + beta L(X,R) + gamma L(X,C)`.
pub fn x2ct_loss(
    tape: &mut Tape,
    c: NodeId,
    r: NodeId,
    x: NodeId,
    weights: LossWeights,
    tau: f64,
    reduction: Reduction,
) -> Result<X2ctTerms> {
    weights.validate()?;
    let n = tape.value(c).shape().first().copied();
    for id in [r, x] {
        if tape.value(id).shape().first().copied() != n {
            return Err(Error::Dimension {
                op: "x2ct_loss",
                left: tape.value(c).shape().to_vec(),
                right: tape.value(id).shape().to_vec(),
            });
        }
    }
    let term = |tape: &mut Tape, w: f64, a: NodeId, b: NodeId| -> Result<Option<(NodeId, NodeId)>> {
        if w == 0.0 {
            return Ok(None);
        }
        let l = info_nce_loss(tape, a, b, tau, reduction)?;
        let weighted = tape.scale(l, w)?;
        Ok(Some((l, weighted)))
    };
    let cr = term(tape, weights.alpha, c, r)?;
    let xr = term(tape, weights.beta, x, r)?;
    let xc = term(tape, weights.gamma, x, c)?;

    let mut total: Option<NodeId> = None;
    for (_, w) in [cr, xr, xc].into_iter().flatten() {
        total = Some(match total {
            None => w,
            Some(t) => tape.add(t, w)?,
        });
    }
    Ok(X2ctTerms {
        cr: cr.map(|p| p.0),
        xr: xr.map(|p| p.0),
        xc: xc.map(|p| p.0),
        total: total.expect("at least one weight is positive"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamWConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lr: c.lr,
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            eps: c.adam_eps,
            weight_decay: c.weight_decay,
        }
    }
}

/// One AdamW update of a single tensor with step count `t` (1-based after
/// increment). Weight decay is decoupled and applied only when `decay`.
pub fn adamw_step(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamWConfig,
    decay: bool,
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        let mut p = param[i] - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        if decay {
            p -= cfg.lr * cfg.weight_decay * param[i];
        }
        param[i] = p;
    }
}

/// Moment buffers for a fixed ordered set of named tensors.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(config: AdamWConfig, model: &impl Parameterized) -> Self {
        let sizes: Vec<usize> = model.named_params().iter().map(|(_, t)| t.len()).collect();
        Self::new(config, &sizes)
    }

    /// Updates every tensor in place. Rank-2 tensors (weight matrices) are
    /// decayed, vectors (biases) are not. A non-finite gradient aborts before
    /// any tensor is touched.
    pub fn step(&mut self, params: Vec<(String, &mut Tensor)>, grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Dimension {
                op: "adamw_step",
                left: vec![self.m.len()],
                right: vec![params.len(), grads.len()],
            });
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::Dimension {
                    op: "adamw_step",
                    left: p.shape().to_vec(),
                    right: vec![g.len()],
                });
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { tensor: name.clone() });
            }
        }
        self.t += 1;
        for (i, ((_, p), g)) in params.into_iter().zip(grads).enumerate() {
            let decay = p.shape().len() == 2;
            adamw_step(p.data_mut(), g, &mut self.m[i], &mut self.v[i], self.t, &self.config, decay);
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub term: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,term,value\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.epoch, r.term, r.value));
        }
        out
    }

    /// Epoch-average values of one term, in epoch order.
    pub fn series(&self, term: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.term == term).map(|r| r.value).collect()
    }
}

/// Shuffled full batches for one epoch; the incomplete tail is dropped.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, tag: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::stream(seed, tag, epoch as u64).shuffle(&mut order);
    order.chunks_exact(batch_size).map(<[usize]>::to_vec).collect()
}

/// Rows `idx` of a matrix, each `block` consecutive rows wide.
pub fn gather_rows(t: &Tensor, idx: &[usize], block: usize) -> Tensor {
    let width = t.shape()[1];
    let stride = block * width;
    let mut data = Vec::with_capacity(idx.len() * stride);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * stride..(i + 1) * stride]);
    }
    Tensor::new(vec![idx.len() * block, width], data).expect("sized")
}

/// Frozen-after-stage-1 volume and report encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct Teachers {
    pub volume: VolumeEncoder,
    pub report: ReportEncoder,
}

impl Teachers {
    pub fn init(space: &LabelSpace, embed_dim: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::stream(seed, TAG_TEACHER_INIT, 0);
        let volume = VolumeEncoder::init(embed_dim, &mut rng);
        let report = ReportEncoder::init(space, embed_dim, &mut rng);
        Self { volume, report }
    }

    pub fn from_checkpoint(space: &LabelSpace, ckpt: &Checkpoint) -> Result<Self> {
        let dim = ckpt
            .get("volume.w")
            .map(|w| w.shape()[1])
            .ok_or_else(|| Error::format("checkpoint", "missing tensor volume.w"))?;
        let mut t = Self::init(space, dim, 0);
        t.volume.load_from(ckpt)?;
        t.report.load_from(ckpt)?;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.volume.to_checkpoint().merged(self.report.to_checkpoint())
    }

    pub fn hash(&self) -> String {
        self.checkpoint().hash()
    }
}

pub fn init_student(config: crate::encoders::StudentConfig, seed: u64) -> Result<RadiographEncoder> {
    RadiographEncoder::init(config, &mut SplitMix64::stream(seed, TAG_STUDENT_INIT, 0))
}

fn check_loss(epoch: usize, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Divergence { epoch, loss: value })
    }
}

fn check_train_rows(n: usize, cfg: &TrainConfig) -> Result<()> {
    if n < cfg.batch_size {
        return Err(Error::config(
            "batch_size",
            format!("{} exceeds the {n} training items", cfg.batch_size),
        ));
    }
    Ok(())
}

/// Stage 1: aligns the teachers on (volume features, report counts) pairs
/// with the C-R term only.
pub fn train_stage1_teachers(
    volume_features: &Tensor,
    report_counts: &Tensor,
    teachers: &mut Teachers,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    let n = volume_features.shape()[0];
    if report_counts.shape()[0] != n {
        return Err(Error::Dimension {
            op: "train_stage1_teachers",
            left: volume_features.shape().to_vec(),
            right: report_counts.shape().to_vec(),
        });
    }
    check_train_rows(n, cfg)?;
    let adam_cfg = AdamWConfig::from(cfg);
    let mut opt_c = AdamW::for_params(adam_cfg, &teachers.volume);
    let mut opt_r = AdamW::for_params(adam_cfg, &teachers.report);
    let mut log = TrainLog::default();

    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(n, cfg.batch_size, cfg.seed, TAG_EPOCH_TEACHER, epoch);
        let mut sum = 0.0;
        for idx in &batches {
            let mut tape = Tape::new();
            let pc = teachers.volume.bind(&mut tape, true);
            let pr = teachers.report.bind(&mut tape, true);
            let xc = tape.constant(gather_rows(volume_features, idx, 1));
            let xr = tape.constant(gather_rows(report_counts, idx, 1));
            let hc = teachers.volume.forward(&mut tape, &pc, xc)?;
            let hr = teachers.report.forward(&mut tape, &pr, xr)?;
            let loss = info_nce_loss(&mut tape, hc, hr, cfg.tau, cfg.reduction)?;
            sum += check_loss(epoch, tape.value(loss).item()?)?;
            tape.backward(loss)?;

            let gc: Vec<&[f64]> = pc.iter().map(|&p| tape.grad(p).expect("param grad")).collect();
            opt_c.step(teachers.volume.named_params_mut(), &gc)?;
            let gr: Vec<&[f64]> = pr.iter().map(|&p| tape.grad(p).expect("param grad")).collect();
            opt_r.step(teachers.report.named_params_mut(), &gr)?;
        }
        let mean = sum / batches.len() as f64;
        log.rows.push(LogRow { epoch, term: "L_CR", value: mean });
        log.rows.push(LogRow { epoch, term: "total", value: mean });
    }
    Ok(log)
}

/// Training inputs of stage 2, row-aligned by item.
#[derive(Debug, Clone, Copy)]
pub struct StudentData<'a> {
    pub volume_features: &'a Tensor,
    pub report_counts: &'a Tensor,
    /// `(n * patches_per_image) x patch^2`.
    pub patches: &'a Tensor,
    pub patches_per_image: usize,
}

/// Stage 2: trains the student against frozen teachers. Teacher embeddings
/// are computed once and enter every tape as constants; the teacher hash is
/// verified after the last epoch.
pub fn train_stage2_student(
    data: StudentData<'_>,
    teachers: &Teachers,
    student: &mut RadiographEncoder,
    cfg: &TrainConfig,
    weights: LossWeights,
) -> Result<TrainLog> {
    cfg.validate()?;
    weights.validate()?;
    let before = teachers.hash();
    let n = data.volume_features.shape()[0];
    if data.report_counts.shape()[0] != n || data.patches.shape()[0] != n * data.patches_per_image {
        return Err(Error::Dimension {
            op: "train_stage2_student",
            left: data.volume_features.shape().to_vec(),
            right: data.patches.shape().to_vec(),
        });
    }
    check_train_rows(n, cfg)?;

    let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let hc_all = teachers.volume.encode_features(ids.clone(), data.volume_features)?.vectors;
    let hr_all = teachers.report.encode_counts(ids, data.report_counts)?.vectors;

    let mut opt = AdamW::for_params(AdamWConfig::from(cfg), student);
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(n, cfg.batch_size, cfg.seed, TAG_EPOCH_STUDENT, epoch);
        let mut sums = [0.0; 4];
        for idx in &batches {
            let mut tape = Tape::new();
            let params = student.bind(&mut tape, true);
            let hc_batch = gather_rows(&hc_all, idx, 1);
            let hr_batch = gather_rows(&hr_all, idx, 1);
            let hc = tape.constant(hc_batch.clone());
            let hr = tape.constant(hr_batch.clone());
            let patches = tape.constant(gather_rows(data.patches, idx, data.patches_per_image));
            let hx = student.forward(&mut tape, &params, patches, data.patches_per_image)?;
            let terms = x2ct_loss(&mut tape, hc, hr, hx, weights, cfg.tau, cfg.reduction)?;
            let total = check_loss(epoch, tape.value(terms.total).item()?)?;

            // Zero-weight terms are evaluated off-tape for the log.
            let hx_value = tape.value(hx).clone();
            let value = |node: Option<NodeId>, a: &Tensor, b: &Tensor| -> Result<f64> {
                match node {
                    Some(id) => tape.value(id).item(),
                    None => info_nce_value(a, b, cfg.tau, cfg.reduction),
                }
            };
            sums[0] += value(terms.cr, &hc_batch, &hr_batch)?;
            sums[1] += value(terms.xr, &hx_value, &hr_batch)?;
            sums[2] += value(terms.xc, &hx_value, &hc_batch)?;
            sums[3] += total;

            tape.backward(terms.total)?;
            let zeros: Vec<Vec<f64>> = params.iter().map(|&p| vec![0.0; tape.value(p).len()]).collect();
            let grads: Vec<&[f64]> = params
                .iter()
                .zip(&zeros)
                .map(|(&p, z)| tape.grad(p).unwrap_or(z))
                .collect();
            opt.step(student.named_params_mut(), &grads)?;
        }
        let nb = batches.len() as f64;
        for (term, s) in ["L_CR", "L_XR", "L_XC", "total"].into_iter().zip(sums) {
            log.rows.push(LogRow { epoch, term, value: s / nb });
        }
    }

    let after = teachers.hash();
    if before != after {
        return Err(Error::FreezeViolation {
            expected: before,
            actual: after,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::StudentConfig;

    fn orthogonal(n: usize) -> Tensor {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
        t
    }

    #[test]
    fn orthogonal_pairs_closed_form() {
        let h = orthogonal(4);
        let l = info_nce_value(&h, &h, 1.0, Reduction::Mean).unwrap();
        // -log(e / (e + 3)) = 0.743668...
        let expected = (std::f64::consts::E + 3.0).ln() - 1.0;
        assert!((l - expected).abs() < 1e-15, "{l}");
        let s = info_nce_value(&h, &h, 1.0, Reduction::Sum).unwrap();
        assert!((s - 4.0 * expected).abs() < 1e-14);
    }

    #[test]
    fn identical_rows_give_log_n() {
        for n in 2..10 {
            let row = vec![0.6, 0.0, 0.8];
            let h = Tensor::from_rows(&vec![row; n]).unwrap();
            let l = info_nce_value(&h, &h, 0.07, Reduction::Mean).unwrap();
            assert!((l - (n as f64).ln()).abs() <= 4.0 * f64::EPSILON, "n={n}: {l}");
        }
    }

    #[test]
    fn rejects_small_or_unnormalized_batches() {
        let one = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            info_nce_value(&one, &one, 1.0, Reduction::Mean),
            Err(Error::BatchTooSmall(1))
        ));
        let bad = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.1]]).unwrap();
        assert!(matches!(
            info_nce_value(&bad, &orthogonal(2), 1.0, Reduction::Mean),
            Err(Error::NotNormalized { row: 1, .. })
        ));
    }

    #[test]
    fn loss_decreases_with_temperature_for_aligned_pairs() {
        let h = orthogonal(6);
        let l: Vec<f64> = [1.0, 0.1, 0.07]
            .iter()
            .map(|&t| info_nce_value(&h, &h, t, Reduction::Mean).unwrap())
            .collect();
        assert!(l[0] > l[1] && l[1] > l[2], "{l:?}");
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0, 1.0).is_err());
        assert!(LossWeights::new(0.0, 1.0, 0.0).is_ok());
    }

    #[test]
    fn adamw_first_step() {
        let cfg = AdamWConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        let (mut p, mut m, mut v) = ([0.0], [0.0], [0.0]);
        adamw_step(&mut p, &[1.0], &mut m, &mut v, 1, &cfg, true);
        assert!((p[0] + 0.1).abs() < 1e-8, "{}", p[0]);
    }

    #[test]
    fn adamw_zero_gradient() {
        let mut cfg = AdamWConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        let (mut p, mut m, mut v) = ([1.5, -2.0], [0.0; 2], [0.0; 2]);
        adamw_step(&mut p, &[0.0, 0.0], &mut m, &mut v, 1, &cfg, true);
        assert_eq!(p, [1.5, -2.0]);
        cfg.weight_decay = 0.5;
        adamw_step(&mut p, &[0.0, 0.0], &mut m, &mut v, 2, &cfg, true);
        for (got, want) in p.iter().zip([1.5 * (1.0 - 0.05), -2.0 * (1.0 - 0.05)]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn adamw_names_nan_tensor_and_skips_bias_decay() {
        let mut w = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let mut b = Tensor::vector(vec![1.0]);
        let cfg = AdamWConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1.0,
        };
        let mut opt = AdamW::new(cfg, &[1, 1]);
        let err = opt
            .step(vec![("w".into(), &mut w), ("b".into(), &mut b)], &[&[0.0], &[f64::NAN]])
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref tensor } if tensor == "b"));
        opt.step(vec![("w".into(), &mut w), ("b".into(), &mut b)], &[&[0.0], &[0.0]])
            .unwrap();
        assert_eq!(w.data(), &[0.9]);
        assert_eq!(b.data(), &[1.0]);
    }

    fn toy_data(n: usize, seed: u64) -> (LabelSpace, Tensor, Tensor, Tensor) {
        let space = LabelSpace::standard(0.3).unwrap();
        let mut rng = SplitMix64::new(seed);
        let feats = Tensor::new(
            vec![n, crate::encoders::VOLUME_FEATURES],
            (0..n * crate::encoders::VOLUME_FEATURES).map(|_| rng.next_f64()).collect(),
        )
        .unwrap();
        let vocab_len = crate::encoders::Vocab::from_label_space(&space).len();
        let counts = Tensor::new(
            vec![n, vocab_len],
            (0..n * vocab_len).map(|_| rng.below(2) as f64).collect(),
        )
        .unwrap();
        // 8x8 images with patch 4: 4 patches of 16 pixels each.
        let patches = Tensor::new(vec![n * 4, 16], (0..n * 64).map(|_| rng.next_f64()).collect()).unwrap();
        (space, feats, counts, patches)
    }

    fn tiny_student() -> RadiographEncoder {
        let cfg = StudentConfig {
            patch: 4,
            patch_hidden: 8,
            hidden: 8,
            embed_dim: 8,
        };
        init_student(cfg, 1).unwrap()
    }

    #[test]
    fn zero_lr_leaves_teachers_bit_identical() {
        let (space, f, c, _) = toy_data(16, 1);
        let mut t = Teachers::init(&space, 8, 3);
        let before = t.hash();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let log = train_stage1_teachers(&f, &c, &mut t, &cfg).unwrap();
        assert_eq!(t.hash(), before);
        assert_eq!(log.series("L_CR").len(), 1);
    }

    #[test]
    fn teacher_training_is_deterministic() {
        let (space, f, c, _) = toy_data(16, 2);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 11,
            ..TrainConfig::default()
        };
        let run = || {
            let mut t = Teachers::init(&space, 8, 3);
            train_stage1_teachers(&f, &c, &mut t, &cfg).unwrap();
            t.hash()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn student_batch_of_two_trains_and_keeps_teachers() {
        let (space, f, c, p) = toy_data(6, 3);
        let teachers = Teachers::init(&space, 8, 3);
        let before = teachers.hash();
        let mut student = tiny_student();
        let init = student.clone();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let data = StudentData {
            volume_features: &f,
            report_counts: &c,
            patches: &p,
            patches_per_image: 4,
        };
        let log = train_stage2_student(data, &teachers, &mut student, &cfg, LossWeights::STUDENT).unwrap();
        assert_ne!(student, init);
        assert_eq!(teachers.hash(), before);
        assert_eq!(log.rows.len(), 2 * 4);
        assert!(log.rows.iter().all(|r| r.value.is_finite()));
    }

    #[test]
    fn student_gradients_vanish_under_teacher_only_weights() {
        let (space, f, c, p) = toy_data(4, 4);
        let teachers = Teachers::init(&space, 8, 3);
        let student = tiny_student();
        let ids: Vec<String> = (0..4).map(|i| i.to_string()).collect();
        let hc = teachers.volume.encode_features(ids.clone(), &f).unwrap().vectors;
        let hr = teachers.report.encode_counts(ids, &c).unwrap().vectors;

        let mut tape = Tape::new();
        let params = student.bind(&mut tape, true);
        let (hc, hr) = (tape.constant(hc), tape.constant(hr));
        let x = tape.constant(p);
        let hx = student.forward(&mut tape, &params, x, 4).unwrap();
        let terms = x2ct_loss(&mut tape, hc, hr, hx, LossWeights::TEACHER, 0.07, Reduction::Mean).unwrap();
        assert!(terms.xr.is_none() && terms.xc.is_none());
        tape.backward(terms.total).unwrap();
        for &id in &params {
            assert!(tape.grad(id).is_none_or(|g| g.iter().all(|&v| v == 0.0)));
        }
        // Teacher embeddings are constants under every weighting.
        assert!(tape.grad(hc).is_none() && tape.grad(hr).is_none());
    }
}
