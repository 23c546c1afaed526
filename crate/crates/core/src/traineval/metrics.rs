use crate::error::{Error, Result};
use crate::tensor::Var;

fn same_len(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

/// Mean absolute error on the tape; `|0|` has subgradient 0.
pub fn mae_loss<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} differ",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(pred.sub(target)?.abs().mean())
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    same_len(pred, target)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(abs_error_sum(pred, target) / pred.len() as f64)
}

pub fn max_ae(pred: &[f64], target: &[f64]) -> Result<f64> {
    same_len(pred, target)?;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).abs())
        .fold(0.0, f64::max))
}

pub(crate) fn abs_error_sum(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn constant_offset() {
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let p: Vec<f64> = t.iter().map(|v| v - 0.25).collect();
        assert_eq!(mae(&p, &t).unwrap(), 0.25);
        assert_eq!(mae(&t, &t).unwrap(), 0.0);
        assert!(mae(&t[..3], &t).is_err());
    }

    #[test]
    fn single_spike() {
        let t = vec![0.0; 8];
        let mut p = t.clone();
        p[5] = -0.5;
        assert_eq!(max_ae(&p, &t).unwrap(), 0.5);
    }

    #[test]
    fn tape_loss_matches_plain() {
        let tape = Tape::new();
        let a = Tensor::from_fn(&[2, 3], |i| i as f64 * 0.3);
        let b = Tensor::from_fn(&[2, 3], |i| (i as f64).sin());
        let l = mae_loss(tape.constant(a.clone()), tape.constant(b.clone())).unwrap();
        assert!((l.value().item() - mae(a.data(), b.data()).unwrap()).abs() < 1e-15);
        let c = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(mae_loss(tape.constant(a), c).is_err());
    }
}
