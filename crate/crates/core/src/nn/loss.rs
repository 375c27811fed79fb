//! Softmax and masked cross-entropy.

use super::NnError;

/// Row-wise softmax of a row-major `rows × classes` matrix.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    assert!(classes > 0 && logits.len() % classes == 0);
    let mut out = vec![0.0; logits.len()];
    for (row, o) in logits.chunks_exact(classes).zip(out.chunks_exact_mut(classes)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (v, &x) in o.iter_mut().zip(row) {
            *v = (x - m).exp();
            sum += *v;
        }
        for v in o.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean negative log-likelihood over frames with `mask == 1`.
///
/// Returns the loss and its gradient w.r.t. `logits`; rows with `mask == 0`
/// get an exactly zero gradient.
pub fn masked_cross_entropy(
    logits: &[f64],
    classes: usize,
    labels: &[usize],
    mask: &[u8],
) -> Result<(f64, Vec<f64>), NnError> {
    let rows = labels.len();
    if classes == 0 || logits.len() != rows * classes || mask.len() != rows {
        return Err(super::shape_err(
            "cross_entropy",
            format!("logits [{rows}, {classes}] and mask [{rows}]"),
            &[logits.len(), mask.len()],
        ));
    }
    let n = mask.iter().filter(|&&m| m != 0).count();
    if n == 0 {
        return Err(NnError::AllMasked);
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for i in 0..rows {
        if mask[i] == 0 {
            continue;
        }
        let label = labels[i];
        if label >= classes {
            return Err(NnError::LabelOutOfRange { label, classes });
        }
        let row = &logits[i * classes..(i + 1) * classes];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        let g = &mut grad[i * classes..(i + 1) * classes];
        for (gv, &x) in g.iter_mut().zip(row) {
            *gv = (x - lse).exp() * inv_n;
        }
        g[label] -= inv_n;
    }
    let loss = loss * inv_n;
    if !loss.is_finite() {
        return Err(NnError::NonFinite("cross-entropy loss".into()));
    }
    Ok((loss, grad))
}
