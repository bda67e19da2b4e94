use crate::autodiff::{Matrix, Tape};
use crate::encoder::{argmax_rows, ClassifierHead, OptimizerKind, OptimizerState};
use crate::error::{Error, Result};
use crate::evaluation::accuracy;
use crate::losses::cross_entropy;

fn ce_value(head: &ClassifierHead, z: &Matrix, y: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let logits = tape.constant(head.logits(z)?);
    let l = cross_entropy(&mut tape, logits, y)?;
    Ok(tape.scalar(l))
}

/// Full-batch Adam on cross-entropy over frozen embeddings, starting from a
/// zero head. Returns the epoch snapshot with the best validation accuracy
/// (ties broken by lower validation loss).
pub fn fit_linear_head(
    z_train: &Matrix,
    y_train: &[usize],
    z_val: &Matrix,
    y_val: &[usize],
    num_classes: usize,
    eta: f64,
    epochs: usize,
) -> Result<ClassifierHead> {
    if z_train.iter().chain(z_val.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("frozen embeddings".into()));
    }
    if z_train.nrows() != y_train.len() || z_val.nrows() != y_val.len() {
        return Err(Error::shape("fit_linear_head", "embedding rows differ from label count"));
    }
    if z_train.ncols() != z_val.ncols() {
        return Err(Error::shape("fit_linear_head", "train and val embedding widths differ"));
    }
    let mut head = ClassifierHead::zeros(z_train.ncols(), num_classes);
    let mut opt = OptimizerState::new(OptimizerKind::Adam, eta);
    let score = |h: &ClassifierHead| -> Result<(f64, f64)> {
        if y_val.is_empty() {
            return Ok((0.0, 0.0));
        }
        let pred = argmax_rows(&h.logits(z_val)?);
        Ok((accuracy(&pred, y_val)?, ce_value(h, z_val, y_val)?))
    };
    let mut best = head.clone();
    let mut best_score = score(&head)?;
    for _ in 0..epochs {
        let mut tape = Tape::new();
        let hv = head.bind(&mut tape);
        let z = tape.constant(z_train.clone());
        let logits = head.classify(&mut tape, &hv, z)?;
        let loss = cross_entropy(&mut tape, logits, y_train)?;
        let grads = tape.backward(loss)?;
        let g = [grads.wrt(hv[0]), grads.wrt(hv[1])];
        let ClassifierHead { weight, bias } = &mut head;
        opt.step(&mut [weight, bias], &g)?;
        let s = score(&head)?;
        if s.0 > best_score.0 || (s.0 == best_score.0 && s.1 < best_score.1) {
            best_score = s;
            best = head.clone();
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_two_class() {
        let z = Matrix::from_row_slice(6, 2, &[-2.0, 0.1, -1.5, -0.3, -1.0, 0.5, 1.0, 0.2, 1.7, -0.4, 2.2, 0.0]);
        let y = [0, 0, 0, 1, 1, 1];
        let head = fit_linear_head(&z, &y, &z, &y, 2, 0.1, 100).unwrap();
        assert_eq!(head.predict(&z).unwrap(), y.to_vec());
    }

    #[test]
    fn constant_embeddings_give_majority_rate() {
        let z = Matrix::from_element(10, 3, 0.7);
        let y = [0, 1, 1, 1, 2, 1, 1, 0, 1, 2];
        let head = fit_linear_head(&z, &y, &z, &y, 3, 0.05, 200).unwrap();
        let pred = head.predict(&z).unwrap();
        assert!((accuracy(&pred, &y).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn rejects_nan() {
        let mut z = Matrix::zeros(2, 2);
        z[(0, 0)] = f64::NAN;
        assert!(fit_linear_head(&z, &[0, 1], &z, &[0, 1], 2, 0.1, 1).is_err());
    }
}
