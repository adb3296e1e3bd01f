//! Cosine similarity between learned superposition weights.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::reparam::PromptParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    /// `n x n`, symmetric.
    pub values: Tensor,
    /// Prompts whose weight vector is all zeros; their rows are 0.
    pub zero_vectors: Vec<usize>,
}

/// `S[i][j] = cos(p'_i, p'_j)` for mixture-based prompts.
pub fn prompt_similarity_matrix(params: &PromptParams) -> Result<SimilarityMatrix> {
    let coefs = params.coefficients().ok_or_else(|| {
        Error::Parameter(format!(
            "similarity analysis needs superposition weights, got {}",
            params.method_name()
        ))
    })?;
    Ok(cosine_matrix(&coefs.iter().map(Tensor::data).collect::<Vec<_>>()))
}

pub fn cosine_matrix(vectors: &[&[f64]]) -> SimilarityMatrix {
    let n = vectors.len();
    let norms: Vec<f64> = vectors.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let zero_vectors: Vec<usize> = (0..n).filter(|&i| norms[i] == 0.0).collect();
    let mut values = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i..n {
            let s = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else if i == j {
                1.0
            } else {
                let dot: f64 = vectors[i].iter().zip(vectors[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            values.set(i, j, s);
            values.set(j, i, s);
        }
    }
    SimilarityMatrix { values, zero_vectors }
}

pub fn write_similarity_csv(path: &std::path::Path, m: &SimilarityMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = m.values.dims().0;
    for i in 0..n {
        w.write_record(m.values.row(i).iter().map(|&v| super::artifacts::format_f64(v)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_vectors_are_orthogonal() {
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 1.0, 0.0];
        let c = [0.0, 0.0, 0.0];
        let s = cosine_matrix(&[&a, &b, &c]);
        assert_eq!(s.values.get(0, 0), 1.0);
        assert_eq!(s.values.get(0, 1), 0.0);
        assert_eq!(s.values.get(2, 2), 0.0);
        assert_eq!(s.zero_vectors, vec![2]);
    }

    #[test]
    fn symmetric_with_unit_diagonal() {
        let v: Vec<Vec<f64>> = (0..5).map(|i| (0..7).map(|j| ((i * 7 + j) as f64).sin()).collect()).collect();
        let refs: Vec<&[f64]> = v.iter().map(Vec::as_slice).collect();
        let s = cosine_matrix(&refs);
        for i in 0..5 {
            assert!((s.values.get(i, i) - 1.0).abs() <= 1e-12);
            for j in 0..5 {
                assert!((s.values.get(i, j) - s.values.get(j, i)).abs() <= 1e-12);
            }
        }
    }
}
