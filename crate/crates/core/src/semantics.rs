//! Zero-shot pixel labelling from precomputed pixel features and text
//! embeddings, and the one-hot encoding used for voting.

use crate::error::{Error, Result};

/// Label value for pixels outside the category vocabulary (e.g. sky).
pub const VOID: u8 = 255;

const UNIT_NORM_TOL: f64 = 1e-6;

/// `(K+1) × D` text embeddings; row 0 is the void class.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows < 2 || dim == 0 || data.len() != rows * dim {
            return Err(Error::Dimension(format!(
                "embedding matrix needs at least 2 rows and {rows}x{dim} values, got {}",
                data.len()
            )));
        }
        if rows - 1 > VOID as usize {
            return Err(Error::Domain(format!(
                "at most {} categories are supported, got {}",
                VOID,
                rows - 1
            )));
        }
        for (i, row) in data.chunks(dim).enumerate() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !n.is_finite() || (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Domain(format!(
                    "embedding row {i} has norm {n}, expected unit norm"
                )));
            }
        }
        Ok(EmbeddingMatrix { rows, dim, data })
    }

    /// Normalizes every row to unit length before validating.
    pub fn from_unnormalized(rows: usize, dim: usize, mut data: Vec<f64>) -> Result<Self> {
        if dim > 0 {
            for row in data.chunks_mut(dim) {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 {
                    row.iter_mut().for_each(|v| *v /= n);
                }
            }
        }
        Self::new(rows, dim, data)
    }

    pub fn num_categories(&self) -> usize {
        self.rows - 1
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// `height × width × D` pixel features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * dim {
            return Err(Error::Dimension(format!(
                "feature map has {} values, expected {height}x{width}x{dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(
                "feature map contains non-finite values".into(),
            ));
        }
        Ok(FeatureMap {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn feature(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.dim;
        &self.data[i..i + self.dim]
    }
}

/// Per-pixel labels in `{VOID} ∪ {0..K−1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMap {
    height: usize,
    width: usize,
    num_classes: usize,
    labels: Vec<u8>,
}

impl SemanticMap {
    pub fn new(height: usize, width: usize, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Dimension(format!(
                "semantic map has {} labels, expected {height}x{width}",
                labels.len()
            )));
        }
        if num_classes > VOID as usize {
            return Err(Error::Domain(format!(
                "at most {VOID} classes are supported, got {num_classes}"
            )));
        }
        if let Some(bad) = labels
            .iter()
            .find(|&&l| l != VOID && l as usize >= num_classes)
        {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(SemanticMap {
            height,
            width,
            num_classes,
            labels,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }
}

/// Result of [`assign_labels`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub map: SemanticMap,
    /// Pixels whose feature vector had zero norm (labelled VOID).
    pub zero_norm: usize,
}

/// Cosine-similarity argmax of every pixel feature against all embedding
/// rows. Row 0 maps to VOID and row `k ≥ 1` to label `k − 1`; ties go to the
/// lowest row.
pub fn assign_labels(feat: &FeatureMap, emb: &EmbeddingMatrix) -> Result<Assignment> {
    if feat.dim != emb.dim {
        return Err(Error::Dimension(format!(
            "feature dimension {} does not match embedding dimension {}",
            feat.dim, emb.dim
        )));
    }
    let mut labels = Vec::with_capacity(feat.height * feat.width);
    let mut zero_norm = 0;
    for f in feat.data.chunks(feat.dim) {
        let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            zero_norm += 1;
            labels.push(VOID);
            continue;
        }
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for r in 0..emb.rows {
            let score: f64 = emb.row(r).iter().zip(f).map(|(e, x)| e * x / n).sum();
            if score > best_score {
                best_score = score;
                best = r;
            }
        }
        labels.push(if best == 0 { VOID } else { (best - 1) as u8 });
    }
    Ok(Assignment {
        map: SemanticMap::new(feat.height, feat.width, emb.num_categories(), labels)?,
        zero_norm,
    })
}

/// `height × width × K` indicator field; VOID pixels are all-zero.
pub fn one_hot(sem: &SemanticMap, num_classes: usize) -> Result<Vec<u8>> {
    if num_classes < sem.num_classes {
        return Err(Error::Domain(format!(
            "one-hot width {num_classes} smaller than the map's {} classes",
            sem.num_classes
        )));
    }
    let mut out = vec![0u8; sem.labels.len() * num_classes];
    for (i, &l) in sem.labels.iter().enumerate() {
        if l != VOID {
            out[i * num_classes + l as usize] = 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis_embeddings(k: usize, d: usize) -> EmbeddingMatrix {
        let mut data = vec![0.0; (k + 1) * d];
        for r in 0..=k {
            data[r * d + r] = 1.0;
        }
        EmbeddingMatrix::new(k + 1, d, data).unwrap()
    }

    #[test]
    fn embedding_rows_must_be_unit() {
        assert!(EmbeddingMatrix::new(2, 2, vec![1.0, 0.0, 0.5, 0.0]).is_err());
        assert!(EmbeddingMatrix::from_unnormalized(2, 2, vec![3.0, 4.0, 0.0, 2.0]).is_ok());
    }

    #[test]
    fn feature_equal_to_row_gets_that_label() {
        let emb = basis_embeddings(3, 5);
        let mut data = Vec::new();
        for r in 0..4 {
            data.extend_from_slice(emb.row(r));
        }
        let feat = FeatureMap::new(1, 4, 5, data).unwrap();
        let a = assign_labels(&feat, &emb).unwrap();
        assert_eq!(a.map.labels(), &[VOID, 0, 1, 2]);
        assert_eq!(a.zero_norm, 0);
    }

    #[test]
    fn zero_feature_is_void_and_counted() {
        let emb = basis_embeddings(2, 3);
        let feat = FeatureMap::new(1, 2, 3, vec![0.0, 0.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        let a = assign_labels(&feat, &emb).unwrap();
        assert_eq!(a.map.labels(), &[VOID, 1]);
        assert_eq!(a.zero_norm, 1);
    }

    #[test]
    fn ties_go_to_lowest_row() {
        let emb = basis_embeddings(2, 3);
        // Equidistant between rows 1 and 2.
        let feat = FeatureMap::new(1, 1, 3, vec![0.0, 1.0, 1.0]).unwrap();
        assert_eq!(assign_labels(&feat, &emb).unwrap().map.labels(), &[0]);
    }

    #[test]
    fn dimension_mismatch() {
        let emb = basis_embeddings(2, 3);
        let feat = FeatureMap::new(1, 1, 4, vec![1.0; 4]).unwrap();
        assert!(matches!(
            assign_labels(&feat, &emb),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn one_hot_examples() {
        let sem = SemanticMap::new(1, 2, 4, vec![2, VOID]).unwrap();
        let oh = one_hot(&sem, 4).unwrap();
        assert_eq!(&oh[0..4], &[0, 0, 1, 0]);
        assert_eq!(&oh[4..8], &[0, 0, 0, 0]);
        assert!(oh.chunks(4).all(|c| c.iter().sum::<u8>() <= 1));
    }

    #[test]
    fn semantic_map_rejects_out_of_range() {
        assert!(SemanticMap::new(1, 1, 3, vec![3]).is_err());
        assert!(SemanticMap::new(1, 1, 3, vec![VOID]).is_ok());
    }
}
