//! Class prototypes and prototype-based frame prediction.

use super::FewShotError;
use crate::nn::softmax_rows;

/// `classes × dim` prototype matrix; row 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeMatrix {
    pub classes: usize,
    pub dim: usize,
    pub w: Vec<f64>,
}

impl PrototypeMatrix {
    pub fn row(&self, j: usize) -> &[f64] {
        &self.w[j * self.dim..(j + 1) * self.dim]
    }

    /// Mean of the prototype rows.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for row in self.w.chunks_exact(self.dim) {
            for (a, b) in m.iter_mut().zip(row) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.classes as f64);
        m
    }

    /// Copy with `origin` subtracted from every row.
    pub fn shifted(&self, origin: &[f64]) -> Self {
        let w = self
            .w
            .chunks_exact(self.dim)
            .flat_map(|row| row.iter().zip(origin).map(|(a, o)| a - o))
            .collect();
        Self { w, ..self.clone() }
    }
}

/// Row `j` is the mean embedding over frames with label `j` and mask 1.
pub fn compute_w(
    embeddings: &[f64],
    dim: usize,
    labels: &[usize],
    mask: &[u8],
    classes: usize,
) -> Result<PrototypeMatrix, FewShotError> {
    let rows = labels.len();
    if dim == 0 || embeddings.len() != rows * dim || mask.len() != rows {
        return Err(FewShotError::Shape(format!(
            "{} embedding values, {rows} labels, {} mask entries, dim {dim}",
            embeddings.len(),
            mask.len()
        )));
    }
    let mut w = vec![0.0; classes * dim];
    let mut counts = vec![0usize; classes];
    for ((e, &y), &m) in embeddings.chunks_exact(dim).zip(labels).zip(mask) {
        if m == 0 {
            continue;
        }
        if y >= classes {
            return Err(FewShotError::Shape(format!("label {y} with {classes} classes")));
        }
        counts[y] += 1;
        for (a, b) in w[y * dim..(y + 1) * dim].iter_mut().zip(e) {
            *a += b;
        }
    }
    for (j, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(FewShotError::EmptyClass(j));
        }
        w[j * dim..(j + 1) * dim].iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(PrototypeMatrix { classes, dim, w })
}

/// `softmax(E Wᵀ)` per frame, `T × classes`.
pub fn predict_query(embeddings: &[f64], dim: usize, w: &PrototypeMatrix) -> Result<Vec<f64>, FewShotError> {
    if dim != w.dim || dim == 0 || embeddings.len() % dim != 0 {
        return Err(FewShotError::Shape(format!(
            "query dim {dim} ({} values) vs prototype dim {}",
            embeddings.len(),
            w.dim
        )));
    }
    let logits: Vec<f64> = embeddings
        .chunks_exact(dim)
        .flat_map(|e| w.w.chunks_exact(dim).map(move |p| e.iter().zip(p).map(|(a, b)| a * b).sum::<f64>()))
        .collect();
    Ok(softmax_rows(&logits, w.classes))
}
