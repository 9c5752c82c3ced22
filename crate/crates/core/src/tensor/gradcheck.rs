use super::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// Below this magnitude the comparison falls back to absolute error.
const ABS_FALLBACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares backward-pass gradients of a scalar computation against central
/// differences with the given step.
///
/// `build` records the computation on a fresh tape given one node per input
/// and returns the scalar output node. It is replayed twice per input
/// element, so it must be a pure function of its inputs.
pub fn grad_check<F>(inputs: &[Tensor], step: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    if step <= 0.0 {
        return Err(Error::config("step", "must be positive"));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &ids)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &ids)?;
    let shape = tape.value(out).shape().to_vec();
    if !tape.value(out).is_scalar() {
        return Err(Error::NonScalar(shape));
    }
    tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (which, id) in ids.iter().enumerate() {
        let zeros = vec![0.0; inputs[which].len()];
        let analytic = tape.grad(*id).unwrap_or(&zeros).to_vec();
        for (elem, &a) in analytic.iter().enumerate() {
            let orig = inputs[which].data()[elem];
            probe[which].data_mut()[elem] = orig + step;
            let up = eval(&probe)?;
            probe[which].data_mut()[elem] = orig - step;
            let down = eval(&probe)?;
            probe[which].data_mut()[elem] = orig;

            let numeric = (up - down) / (2.0 * step);
            let scale = a.abs().max(numeric.abs());
            let err = if scale < ABS_FALLBACK {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / scale
            };
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = (which, elem);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
