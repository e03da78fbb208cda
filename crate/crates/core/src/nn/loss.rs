use super::{NnError, Scalar, Tensor};

/// Numerically stable softmax of one logit vector.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of one logit vector against `label`: `(-ln p[label], p)`.
pub fn softmax_xent<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>), NnError> {
    if label >= logits.len() {
        return Err(NnError::ShapeMismatch(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let sum: T = logits.iter().map(|&v| (v - max).exp()).sum();
    let log_z = max + sum.ln();
    let probs = logits.iter().map(|&v| (v - log_z).exp()).collect();
    Ok((log_z - logits[label], probs))
}

/// Mean cross-entropy over a `[batch, classes]` logit tensor.
///
/// Returns `(loss, probabilities, d loss / d logits)`.
pub fn softmax_xent_batch<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>, Tensor<T>), NnError> {
    let dims = logits.dims();
    if dims.len() != 2 || dims[0] != labels.len() || dims[0] == 0 {
        return Err(NnError::ShapeMismatch(format!(
            "logits {dims:?} vs {} labels",
            labels.len()
        )));
    }
    let (b, c) = (dims[0], dims[1]);
    let inv_b = T::one() / T::from(b).expect("batch size");
    let mut total = T::zero();
    let mut probs = Vec::with_capacity(b * c);
    let mut grad = Vec::with_capacity(b * c);
    for (row, &label) in logits.data().chunks_exact(c).zip(labels) {
        let (loss, p) = softmax_xent(row, label)?;
        total += loss;
        for (j, &pj) in p.iter().enumerate() {
            let target = if j == label { T::one() } else { T::zero() };
            grad.push((pj - target) * inv_b);
        }
        probs.extend(p);
    }
    Ok((
        total * inv_b,
        Tensor::from_vec(&[b, c], probs)?,
        Tensor::from_vec(&[b, c], grad)?,
    ))
}
