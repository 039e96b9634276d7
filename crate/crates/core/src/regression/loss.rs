use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::backbone::TokenLogits;
use crate::error::{Error, Result};

/// `(1/N) Σ (pred_i − label_i)²`.
pub fn mse_loss(pred: &[f64], label: &[f64]) -> Result<f64> {
    check_pairs(pred, label)?;
    Ok(pred
        .iter()
        .zip(label)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Gradient of [`mse_loss`] w.r.t. each prediction.
pub fn mse_grad(pred: &[f64], label: &[f64]) -> Result<Vec<f64>> {
    check_pairs(pred, label)?;
    let n = pred.len() as f64;
    Ok(pred.iter().zip(label).map(|(p, y)| 2.0 * (p - y) / n).collect())
}

fn check_pairs(pred: &[f64], label: &[f64]) -> Result<()> {
    if pred.len() != label.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} labels",
            pred.len(),
            label.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("loss over zero samples".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

fn log_softmax_row(row: ndarray::ArrayView1<f64>) -> Vec<f64> {
    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn check_target(logits: &TokenLogits, target: &[usize]) -> Result<()> {
    if target.is_empty() {
        return Err(Error::Shape("empty target sequence".into()));
    }
    if logits.steps() < target.len() {
        return Err(Error::Shape(format!(
            "{} logit steps for a {}-token target",
            logits.steps(),
            target.len()
        )));
    }
    if let Some(&bad) = target.iter().find(|&&t| t >= logits.logits.ncols()) {
        return Err(Error::Vocabulary(bad));
    }
    Ok(())
}

/// `−Σ_t log softmax(logits_t)[target_t]` over the target length, optionally
/// divided by the length.
pub fn ce_loss(logits: &TokenLogits, target: &[usize], reduction: Reduction) -> Result<f64> {
    check_target(logits, target)?;
    let total: f64 = target
        .iter()
        .enumerate()
        .map(|(t, &y)| -log_softmax_row(logits.logits.row(t))[y])
        .sum();
    Ok(match reduction {
        Reduction::Sum => total,
        Reduction::Mean => total / target.len() as f64,
    })
}

/// Loss plus its gradient w.r.t. the logits (rows past the target are zero).
pub fn ce_loss_grad(logits: &TokenLogits, target: &[usize], reduction: Reduction) -> Result<(f64, Array2<f64>)> {
    check_target(logits, target)?;
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / target.len() as f64,
    };
    let mut grad = Array2::zeros(logits.logits.raw_dim());
    let mut total = 0.0;
    for (t, &y) in target.iter().enumerate() {
        let lp = log_softmax_row(logits.logits.row(t));
        total -= lp[y];
        for (k, l) in lp.iter().enumerate() {
            let p = l.exp();
            grad[[t, k]] = scale * (p - if k == y { 1.0 } else { 0.0 });
        }
    }
    Ok((total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::vocab;

    fn logits(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> TokenLogits {
        TokenLogits::new(Array2::from_shape_fn((rows, cols), |(i, j)| f(i, j))).unwrap()
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(mse_loss(&[0.0], &[1.0, 0.0]), Err(Error::Shape(_))));
        assert!(mse_loss(&[], &[]).is_err());
    }

    #[test]
    fn ce_uniform_closed_form() {
        let l = logits(6, vocab::SIZE, |_, _| 0.0);
        let target = [0, vocab::DOT, 5, 0, 0, vocab::END];
        let sum = ce_loss(&l, &target, Reduction::Sum).unwrap();
        assert!((sum - 6.0 * 12f64.ln()).abs() < 1e-9);
        let mean = ce_loss(&l, &target, Reduction::Mean).unwrap();
        assert!((mean - 12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn ce_peaked_logits_near_zero() {
        let target = [3, vocab::DOT, 7];
        let l = logits(3, vocab::SIZE, |i, j| if j == target[i] { 20.0 } else { 0.0 });
        assert!(ce_loss(&l, &target, Reduction::Sum).unwrap() < 1e-3);
    }

    #[test]
    fn ce_rejects_out_of_vocab_and_short_logits() {
        let l = logits(2, vocab::SIZE, |_, _| 0.0);
        assert!(matches!(ce_loss(&l, &[12], Reduction::Sum), Err(Error::Vocabulary(12))));
        assert!(matches!(ce_loss(&l, &[1, 2, 3], Reduction::Sum), Err(Error::Shape(_))));
    }

    #[test]
    fn ce_grad_matches_finite_differences() {
        let base = logits(3, vocab::SIZE, |i, j| ((i * 13 + j * 7) % 5) as f64 * 0.3 - 0.6);
        let target = [2, vocab::DOT, 9];
        for red in [Reduction::Sum, Reduction::Mean] {
            let (_, g) = ce_loss_grad(&base, &target, red).unwrap();
            for i in 0..3 {
                for j in 0..vocab::SIZE {
                    let h = 1e-6;
                    let mut up = base.clone();
                    up.logits[[i, j]] += h;
                    let mut dn = base.clone();
                    dn.logits[[i, j]] -= h;
                    let num = (ce_loss(&up, &target, red).unwrap() - ce_loss(&dn, &target, red).unwrap()) / (2.0 * h);
                    assert!((num - g[[i, j]]).abs() < 1e-7);
                }
            }
        }
    }
}
