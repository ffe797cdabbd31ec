//! Gradient verification against central finite differences.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tape::Tape;
use super::tensor::Tensor;

/// Compares reverse-mode gradients of `f` against central finite
/// differences, coordinate by coordinate, and returns the worst relative
/// error. The denominator is floored at one so near-zero gradients are
/// compared absolutely instead of blowing up the ratio.
///
/// `f` must build its computation on the tape it is handed; it is called
/// once on a recording tape for the analytic gradients and twice per
/// parameter coordinate for the difference quotients.
pub fn finite_diff_check<S, F>(f: F, params: &[Tensor<S>], eps: S) -> Result<S>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[Tensor<S>]) -> Result<Tensor<S>>,
{
    if eps <= S::zero() {
        return Err(Error::domain("finite_diff_check", "eps must be positive"));
    }

    let mut tape = Tape::new();
    let tracked: Vec<Tensor<S>> = params.iter().map(|p| tape.var(p)).collect();
    let loss = f(&mut tape, &tracked)?;
    let base = loss.item()?;
    if !base.is_finite() {
        return Err(Error::NonFinite {
            op: "finite_diff_check",
            detail: "f returned a non-finite value".into(),
        });
    }
    let grads = tape.backward(&loss)?;
    let analytic: Vec<Tensor<S>> = tracked
        .iter()
        .map(|t| grads.wrt(t))
        .collect::<Result<_>>()?;

    let eval = |probe: &[Tensor<S>]| -> Result<S> {
        let mut scratch = Tape::new();
        let v = f(&mut scratch, probe)?.item()?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite {
                op: "finite_diff_check",
                detail: "f returned a non-finite value at a probe point".into(),
            })
        }
    };

    let two = S::one() + S::one();
    let mut worst = S::zero();
    let mut probe: Vec<Tensor<S>> = params.to_vec();
    for pi in 0..params.len() {
        for ci in 0..params[pi].len() {
            let orig = params[pi].values()[ci];
            probe[pi].values_mut()[ci] = orig + eps;
            let fplus = eval(&probe)?;
            probe[pi].values_mut()[ci] = orig - eps;
            let fminus = eval(&probe)?;
            probe[pi].values_mut()[ci] = orig;

            let fd = (fplus - fminus) / (two * eps);
            let ad = analytic[pi].values()[ci];
            let denom = ad.abs().max(fd.abs()).max(S::one());
            let err = (ad - fd).abs() / denom;
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
