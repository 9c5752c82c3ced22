//! Finite-difference checks of every tape op and of the full training loss,
//! shared by the `gradcheck` command and the acceptance suite.

use crate::contrastive::{x2ct_loss, LossWeights};
use crate::encoders::{Parameterized, RadiographEncoder, StudentConfig};
use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::{grad_check, GradCheckReport, NodeId, OpKind, Reduction, Tape, Tensor};

pub const STEP: f64 = 1e-4;

fn matrix(rng: &mut SplitMix64, r: usize, c: usize) -> Tensor {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.uniform(-1.0, 1.0)).collect()).expect("sized")
}

fn unit_rows(rng: &mut SplitMix64, r: usize, c: usize) -> Tensor {
    let mut t = matrix(rng, r, c);
    for row in t.data_mut().chunks_mut(c) {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= n);
    }
    t
}

/// `||y C||^2` for a fixed random `C`, so every output element matters.
fn readout(tape: &mut Tape, y: NodeId, c: &Tensor) -> Result<NodeId> {
    let cn = tape.constant(c.clone());
    let z = tape.matmul(y, cn)?;
    tape.sum_squares(z)
}

/// Checks each op on random inputs drawn from `seed`.
pub fn check_ops(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = SplitMix64::new(seed);
    let a = matrix(&mut rng, 4, 3);
    let a2 = matrix(&mut rng, 4, 3);
    let b = matrix(&mut rng, 3, 5);
    let bias = Tensor::vector(matrix(&mut rng, 1, 3).into_data());
    let c3 = matrix(&mut rng, 3, 2);
    let c4 = matrix(&mut rng, 4, 2);
    let c5 = matrix(&mut rng, 5, 2);
    let logits = matrix(&mut rng, 4, 4);
    let targets: Vec<usize> = (0..4).map(|_| rng.below(4) as usize).collect();
    let y = Tensor::new(vec![4, 3], (0..12).map(|_| rng.below(2) as f64).collect())?;
    // Kept at least 0.05 away from the relu kink.
    let mut kinkless = matrix(&mut rng, 4, 3);
    kinkless.data_mut().iter_mut().for_each(|v| {
        if v.abs() < 0.05 {
            *v += 0.1f64.copysign(*v);
        }
    });

    let mut out = Vec::new();
    let mut run = |name: &'static str, inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId>| -> Result<()> {
        out.push((name, grad_check(inputs, STEP, f)?));
        Ok(())
    };
    run("matmul", &[a.clone(), b], &|t, i| {
        let m = t.matmul(i[0], i[1])?;
        readout(t, m, &c5)
    })?;
    run("add", &[a.clone(), a2.clone()], &|t, i| {
        let m = t.add(i[0], i[1])?;
        readout(t, m, &c3)
    })?;
    run("add_row", &[a.clone(), bias], &|t, i| {
        let m = t.add_row(i[0], i[1])?;
        readout(t, m, &c3)
    })?;
    run("scale", std::slice::from_ref(&a), &|t, i| {
        let m = t.scale(i[0], -1.7)?;
        readout(t, m, &c3)
    })?;
    run("relu", &[kinkless], &|t, i| {
        let m = t.relu(i[0])?;
        readout(t, m, &c3)
    })?;
    run("mean_pool", std::slice::from_ref(&a), &|t, i| {
        let m = t.mean_pool(i[0], 2)?;
        readout(t, m, &c3)
    })?;
    run("l2_normalize_rows", std::slice::from_ref(&a), &|t, i| {
        let m = t.l2_normalize_rows(i[0], 1e-12)?;
        readout(t, m, &c3)
    })?;
    run("similarity", &[a.clone(), a2], &|t, i| {
        let m = t.similarity(i[0], i[1])?;
        readout(t, m, &c4)
    })?;
    run("softmax_cross_entropy_rows", std::slice::from_ref(&logits), &|t, i| {
        t.softmax_cross_entropy_rows(i[0], &targets, Reduction::Mean)
    })?;
    run("softmax_cross_entropy_rows(sum)", &[logits], &|t, i| {
        t.softmax_cross_entropy_rows(i[0], &targets, Reduction::Sum)
    })?;
    run("sigmoid_cross_entropy", std::slice::from_ref(&a), &|t, i| {
        t.sigmoid_cross_entropy(i[0], &y, &[1.0, 0.0, 1.0])
    })?;
    run("sum_squares", std::slice::from_ref(&a), &|t, i| t.sum_squares(i[0]))?;
    run("sum", &[a], &|t, i| t.sum(i[0]))?;
    Ok(out)
}

/// Full weighted loss against every student tensor on a small random batch.
/// Returns `None` when the draw puts a relu input within `1e-3` of its kink,
/// where central differences are undefined.
pub fn check_student_loss(seed: u64, weights: LossWeights) -> Result<Option<GradCheckReport>> {
    let cfg = StudentConfig {
        patch: 4,
        patch_hidden: 6,
        hidden: 6,
        embed_dim: 5,
    };
    let mut rng = SplitMix64::new(seed);
    let student = RadiographEncoder::init(cfg, &mut rng)?;
    let n = 4;
    let per = 4;
    let patches = matrix(&mut rng, n * per, 16);
    let hc = unit_rows(&mut rng, n, 5);
    let hr = unit_rows(&mut rng, n, 5);

    let mut probe = Tape::new();
    let p = student.bind(&mut probe, false);
    let x = probe.constant(patches.clone());
    student.forward(&mut probe, &p, x, per)?;
    let margin = probe
        .records()
        .iter()
        .filter(|r| r.kind == OpKind::Relu)
        .flat_map(|r| probe.value(r.inputs[0]).data().to_vec())
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if margin < 1e-3 {
        return Ok(None);
    }

    let params: Vec<Tensor> = student.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    let report = grad_check(&params, STEP, |t, ids| {
        let x = t.constant(patches.clone());
        let hx = student.forward(t, ids, x, per)?;
        let (c, r) = (t.constant(hc.clone()), t.constant(hr.clone()));
        Ok(x2ct_loss(t, c, r, hx, weights, 0.07, Reduction::Mean)?.total)
    })?;
    Ok(Some(report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ops_and_student_pass_on_a_few_seeds() {
        for seed in 0..3 {
            for (name, r) in check_ops(seed).unwrap() {
                assert!(r.max_rel_error < 1e-4, "{name}: {r:?}");
            }
        }
        let mut passed = 0;
        for seed in 0..10 {
            if let Some(r) = check_student_loss(seed, LossWeights::STUDENT).unwrap() {
                assert!(r.max_rel_error < 1e-4, "{r:?}");
                passed += 1;
            }
        }
        assert!(passed >= 5);
    }
}
