use serde::{Deserialize, Serialize};

use super::ScoreError;

/// Rows must sum to one within this tolerance.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Per-position probability vectors over an alphabet, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionMatrix {
    width: usize,
    positions: Vec<usize>,
    data: Vec<f64>,
}

impl DistributionMatrix {
    pub fn new(width: usize, positions: Vec<usize>, data: Vec<f64>) -> Result<Self, ScoreError> {
        if width == 0 || data.len() != width * positions.len() {
            return Err(ScoreError::Shape(format!(
                "{} values cannot form {} rows of width {width}",
                data.len(),
                positions.len()
            )));
        }
        for (k, row) in data.chunks(width).enumerate() {
            check_row(row).map_err(|sum| ScoreError::NotNormalized {
                position: positions[k],
                sum,
            })?;
        }
        Ok(Self {
            width,
            positions,
            data,
        })
    }

    pub fn from_rows(positions: Vec<usize>, rows: Vec<Vec<f64>>) -> Result<Self, ScoreError> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(ScoreError::Shape("rows of unequal width".into()));
        }
        Self::new(width, positions, rows.concat())
    }

    /// Uniform rows at the given positions.
    pub fn uniform(width: usize, positions: Vec<usize>) -> Self {
        let data = vec![1.0 / width as f64; width * positions.len()];
        Self {
            width,
            positions,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.width)
    }

    /// Row covering sequence position `pos`, if any.
    pub fn at(&self, pos: usize) -> Option<&[f64]> {
        let k = if self.positions.get(pos) == Some(&pos) {
            pos
        } else {
            self.positions.binary_search(&pos).ok()?
        };
        Some(self.row(k))
    }

    pub fn into_parts(self) -> (usize, Vec<usize>, Vec<f64>) {
        (self.width, self.positions, self.data)
    }

    /// Assembles a matrix from single rows gathered at distinct positions.
    pub(crate) fn assemble(width: usize, mut rows: Vec<(usize, Vec<f64>)>) -> Self {
        rows.sort_by_key(|(p, _)| *p);
        let positions = rows.iter().map(|(p, _)| *p).collect();
        let data = rows.into_iter().flat_map(|(_, r)| r).collect();
        Self {
            width,
            positions,
            data,
        }
    }
}

fn check_row(row: &[f64]) -> Result<(), f64> {
    let sum: f64 = row.iter().sum();
    if row.iter().all(|p| p.is_finite() && *p >= 0.0) && (sum - 1.0).abs() <= NORMALIZATION_TOL {
        Ok(())
    } else {
        Err(sum)
    }
}

/// Per-position real vectors of constant width (final-layer embeddings).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embeddings {
    width: usize,
    data: Vec<f64>,
}

impl Embeddings {
    pub fn new(width: usize, data: Vec<f64>) -> Result<Self, ScoreError> {
        if width == 0 || data.len() % width != 0 {
            return Err(ScoreError::Shape(format!(
                "{} values are not a multiple of width {width}",
                data.len()
            )));
        }
        Ok(Self { width, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, pos: usize) -> &[f64] {
        &self.data[pos * self.width..(pos + 1) * self.width]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unnormalized_rows() {
        assert!(DistributionMatrix::new(2, vec![0], vec![0.5, 0.6]).is_err());
        assert!(DistributionMatrix::new(2, vec![0], vec![1.5, -0.5]).is_err());
        assert!(DistributionMatrix::new(2, vec![0, 1], vec![0.5, 0.5]).is_err());
        assert!(DistributionMatrix::new(2, vec![3], vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn lookup_by_position() {
        let m = DistributionMatrix::from_rows(vec![2, 5], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(m.at(5), Some(&[0.0, 1.0][..]));
        assert_eq!(m.at(3), None);
    }
}
