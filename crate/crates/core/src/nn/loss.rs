use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over a batch and its gradient w.r.t. the logits.
///
/// `dlogits = (softmax − onehot) / N`; the log-sum-exp is max-shifted.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = match logits.shape() {
        &[n, k] => (n, k),
        other => {
            return Err(Error::InvalidArgument(format!(
                "logits must be N×K, got {other:?}"
            )))
        }
    };
    if labels.len() != n {
        return Err(Error::shape(&[n], &[labels.len()]));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * k];
    for (i, (row, &label)) in logits.data().chunks_exact(k).zip(labels).enumerate() {
        if label >= k {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {k} classes"
            )));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[label];
        let g = &mut grad[i * k..(i + 1) * k];
        for (gj, &v) in g.iter_mut().zip(row) {
            *gj = (v - lse).exp() / n as f64;
        }
        g[label] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, Tensor::from_vec(&[n, k], grad)?))
}

/// Index of the largest logit per row; ties go to the lowest class index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[logits.rank() - 1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
